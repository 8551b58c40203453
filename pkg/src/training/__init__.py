"""Losses, optimizer and the two-stage training procedure"""
