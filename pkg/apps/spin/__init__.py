__all__ = ["Spin"]
from .spin import Spin
