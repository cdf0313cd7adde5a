from cirlab.domain.pool.schemas import PoolConfig, PoolTargets
from cirlab.domain.pool.services import ModelPool, ensemble_predict

__all__ = ("ModelPool", "PoolConfig", "PoolTargets", "ensemble_predict")
