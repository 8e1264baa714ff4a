from app.evaluation.metrics import (diversity_score, fid, frechet_distance,
                                    product_sqrtm)
from app.evaluation.features import (FeatureClassifier, make_feature_fn,
                                     train_feature_extractor)
from app.evaluation.synthesis import (Sample, build_grid_cells,
                                      reference_grid, reference_synthesis)
from app.evaluation.pipeline import evaluate
from app.evaluation.report import write_cluster_report, write_metric_report
