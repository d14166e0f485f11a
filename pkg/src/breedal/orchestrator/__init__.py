"""Launcher, wire protocol and training server."""
