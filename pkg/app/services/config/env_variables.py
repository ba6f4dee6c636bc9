import os

from dotenv import dotenv_values

current_dir = os.path.dirname(os.path.abspath(__file__))
app_dir = os.path.dirname(os.path.dirname(current_dir))

dotenv_file = "dev.settings.config.env"
dotenv_path = os.path.join(app_dir, "config", dotenv_file)


def set_env_variables_from_dotenv(path: str = dotenv_path) -> dict[str, str]:
    """Overlay variables from the dev env file, when present, onto os.environ."""
    if not os.path.isfile(path):
        return {}
    env_variables = {k: v for k, v in dotenv_values(path).items() if v is not None}
    for key, value in env_variables.items():
        os.environ[key] = value
    return env_variables
