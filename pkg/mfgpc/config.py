from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    # Prior factorization
    JITTER: float = 1e-8
    MAX_JITTER: float = 1e-4

    # Newton mode-fitting
    NEWTON_TOL: float = 1e-6
    NEWTON_MAX_ITERS: int = 100
    NEWTON_MAX_HALVINGS: int = 20

    # Hyperparameter search
    OPT_RESTARTS: int = 5
    OPT_MAX_STEPS: int = 200
    OPT_GRAD_TOL: float = 1e-5
    OPT_STEP_TOL: float = 1e-9

    # MCMC oracle
    MCMC_SAMPLES: int = 4000
    MCMC_BURN_IN: int = 1000
    MCMC_THIN: int = 2

    # Synthetic data
    PROBE_SIZE: int = 4096

    # Runtime
    DEFAULT_SEED: int = 0
    LOG_LEVEL: str = "INFO"
    FLOAT_DIGITS: int = 17

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="MFGPC_",
        case_sensitive=True,
        extra="ignore",
    )

    @property
    def float_format(self) -> str:
        return f".{self.FLOAT_DIGITS}g"


settings = Settings()
