"""Schedule, residual diffusion and sampler tests"""
