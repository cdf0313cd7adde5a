from cirlab.domain.stream.etl import ImageStore, build_synthetic_dataset, ingest_dataset, write_dataset
from cirlab.domain.stream.images import SyntheticImages, rotate_image, synth_image
from cirlab.domain.stream.schemas import EvalSet, Experience, StreamConfig
from cirlab.domain.stream.services import draw_class_sets, generate_stream, make_eval_set

__all__ = (
    "EvalSet",
    "Experience",
    "ImageStore",
    "StreamConfig",
    "SyntheticImages",
    "build_synthetic_dataset",
    "draw_class_sets",
    "generate_stream",
    "ingest_dataset",
    "make_eval_set",
    "rotate_image",
    "synth_image",
    "write_dataset",
)
