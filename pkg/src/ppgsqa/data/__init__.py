"""File formats, weight serialisation, synthetic corpus and dataset assembly."""
from .dataset import SegmentDataset, load_dataset, records_to_dataset
from .formats import (DatasetManifest, ManifestEntry, load_record, read_manifest, save_record,
                      write_manifest, write_predictions)
from .synth import SynthesisConfig, synthesize_corpus, synthesize_records
from .weights import load_weights, save_weights

__all__ = [
    "DatasetManifest", "ManifestEntry", "SegmentDataset", "SynthesisConfig", "load_dataset",
    "load_record", "load_weights", "read_manifest", "records_to_dataset", "save_record",
    "save_weights", "synthesize_corpus", "synthesize_records", "write_manifest",
    "write_predictions",
]
