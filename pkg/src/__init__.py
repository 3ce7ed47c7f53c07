"""
fsilab: spring-mounted rigid body in a viscous stream
"""

__version__ = "0.1.0"
