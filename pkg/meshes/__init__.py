"""Triangle meshes: parsing, geometry and synthetic deformation pairs."""
