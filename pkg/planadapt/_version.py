from importlib.metadata import PackageNotFoundError, version
from pathlib import Path

import versioningit

REPO_ROOT = Path(__file__).parent.parent


def _resolve_version() -> str:
    try:
        return versioningit.get_version(project_dir=REPO_ROOT)
    except versioningit.errors.Error:
        pass
    try:
        return version("planadapt")
    except PackageNotFoundError:
        return "unknown"


__version__ = _resolve_version()
