from .game_spec_service import game_spec_service
from .game_vm_service import game_vm_service
from .cdg_service import cdg_service
from .neat_service import neat_service
from .network_service import network_service
from .play_service import play_service
from .fitness_service import fitness_service
from .oracle_service import oracle_service
from .mutation_service import mutation_service
from .statistics_service import statistics_service
from .search_service import search_service
from .report_service import report_service
