"""Matrix-free tensor-product DG operators with Kronecker-product preconditioners."""

__version__ = "0.1.0"
