"""Open-retrieval conversational machine reading: retrieve rule texts, then
decide Yes/No/Inquire or generate a follow-up question from a fused
representation of the retrieved candidates, with an auxiliary entailment
head supervising the shared encoder during training."""

__version__ = "0.1.0"
