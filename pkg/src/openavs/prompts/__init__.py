"""Translator system-prompt fixtures, one plain-text file per mode."""
