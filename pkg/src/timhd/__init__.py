"""Charge-conservative finite elements for thermally coupled inductionless MHD in 2D."""
