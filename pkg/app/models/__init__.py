from .vm_state import SpriteInstance, Thread, Frame, VmDiagnostic, VmState, StepResult
