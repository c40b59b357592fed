from .game import *
from .neat import *
