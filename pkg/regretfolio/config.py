"""Application configuration via pydantic-settings with REGRETFOLIO_ env prefix."""

from dotenv import load_dotenv
from pydantic_settings import BaseSettings

# Load .env into os.environ so solver backends that read their own env vars see it too.
load_dotenv(override=False)


class Settings(BaseSettings):
    solver: str = "CLARABEL"
    fallback_solver: str = "SCS"
    solver_max_iters: int = 10_000
    primal_tolerance: float = 1e-7
    gap_tolerance: float = 1e-6
    certify_tolerance: float = 1e-7
    max_workers: int = 1
    default_samples: int = 1000
    default_seed: int = 0
    hull_check_samples: int = 64
    box_vertex_limit: int = 12
    cache_enabled: bool = True
    cache_max_entries: int = 4096
    output_precision: int = 12
    log_level: str = "WARNING"

    @property
    def solver_chain(self) -> list[str]:
        """Primary solver followed by the fallback, without duplicates."""
        chain = [self.solver.upper()]
        if self.fallback_solver and self.fallback_solver.upper() not in chain:
            chain.append(self.fallback_solver.upper())
        return chain

    model_config = {"env_prefix": "REGRETFOLIO_", "env_file": ".env", "env_file_encoding": "utf-8", "extra": "ignore"}


settings = Settings()
