"""Multi-date satellite stereo: rectification, supervision and DSM reconstruction."""
