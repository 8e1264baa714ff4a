from app.data.augment import augment, child_rng, load_image, normalize
from app.data.manifest import (MANIFEST_NAME, PRESETS, load_manifest,
                               open_manifest, sample_split)
from app.data.loader import ImageStore, PairDataset, RecordDataset
from app.data.toy import generate_toy
