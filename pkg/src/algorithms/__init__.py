"""Noise schedule, residual diffusion process and samplers"""
