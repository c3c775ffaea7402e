"""idvae - identifiability checks for VAE, iVAE and VaDE representations."""

__version__ = "0.1.0"
