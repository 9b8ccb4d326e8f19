from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Ambient settings read from the environment and an optional .env file.

    Experiment parameters live in the YAML experiment file; these settings only
    cover process-level concerns (logging, defaults for output and parallelism).
    """

    # Application
    APP_NAME: str = "Pullback Attractor Laboratory"
    APP_VERSION: str = "1.0.0"
    ENVIRONMENT: str = "development"
    LOG_LEVEL: str = "INFO"

    # Outputs
    DEFAULT_OUTPUT_DIR: str = "artifacts"
    FLOAT_FORMAT: str = ".17g"

    # Execution
    DEFAULT_JOBS: int = 1
    FACTORIZATION_CACHE_SIZE: int = 32

    model_config = SettingsConfigDict(env_file=".env", case_sensitive=True)


# Global settings instance
settings = Settings()
