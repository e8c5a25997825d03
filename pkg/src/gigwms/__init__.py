"""Gig-work management: worker acceptance model, certified offer planning, experiments."""

__version__ = "0.1.0"
