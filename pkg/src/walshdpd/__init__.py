"""Walsh-domain neural-network digital predistortion workbench."""
