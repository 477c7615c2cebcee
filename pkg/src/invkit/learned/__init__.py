"""Learned reconstruction: supervised, self-supervised, generative and untrained priors."""
