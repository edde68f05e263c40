"""Sequential molecular graph generation."""
