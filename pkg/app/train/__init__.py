from app.train.checkpoints import (load_models, resolve_checkpoint_dir,
                                   save_training_checkpoint)
from app.train.trainer import (TrainResult, epoch_pairs, run_training,
                               training_step)
