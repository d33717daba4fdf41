"""EDM music-structure segmentation toolkit."""
