from . import handlers, schemas  # noqa: F401
from .app import app, create_app  # noqa: F401
