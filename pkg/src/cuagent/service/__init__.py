"""Machine-side interp service: the normative end of the environment wire protocol."""

from .app import create_app, run_script, serve, wire_schemas
from .displays import NoDisplay, SimDisplay, XDisplay, placeholder_png

__all__ = ["create_app", "run_script", "serve", "wire_schemas", "NoDisplay", "SimDisplay", "XDisplay", "placeholder_png"]
