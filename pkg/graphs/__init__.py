"""Local graphs, shape graphs and geodesic supervision."""
