"""Aggregating Algorithm for quasi-sum loss aggregation."""
