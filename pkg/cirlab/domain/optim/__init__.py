from cirlab.domain.optim.adam import AdamState, adam_step

__all__ = ("AdamState", "adam_step")
