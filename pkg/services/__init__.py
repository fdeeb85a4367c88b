"""
Services package initializer.
Business logic only; nothing here imports Flask.
"""

TOOL_VERSION = "0.1.0"
