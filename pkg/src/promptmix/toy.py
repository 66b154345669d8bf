"""The bundled four-image toy dataset with an all-mock configuration."""

import shutil
from importlib import resources
from pathlib import Path


def toy_dir() -> Path:
    return Path(str(resources.files("promptmix") / "data" / "toy"))


def install_toy(dest) -> Path:
    """Copy the toy dataset to ``dest`` and return the path of its config."""
    dest = Path(dest)
    shutil.copytree(toy_dir(), dest, dirs_exist_ok=True)
    return dest / "config.json"
