"""Level lines of the Gaussian free field with one free boundary arc."""
