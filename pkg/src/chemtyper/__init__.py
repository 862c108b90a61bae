"""Fine-grained chemical entity typing with multimodal definitions."""

from chemtyper.errors import ContractError

__version__ = "0.1.0"

__all__ = ["ContractError", "__version__"]
