from .BaseReplica import BaseReplica

__all__ = ["BaseReplica"]
