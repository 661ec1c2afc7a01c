"""Command-line front end: scenario files and the run/check/export-plots commands."""
