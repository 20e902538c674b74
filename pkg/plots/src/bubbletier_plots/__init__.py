"""Publication-style figures for bubbletier artifacts."""
