"""Studies built on the library: each module computes one study and saves it."""
