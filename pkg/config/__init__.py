"""Process settings and the default experiment configuration"""
