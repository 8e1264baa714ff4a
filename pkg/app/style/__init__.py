from app.style.encoder import StyleEncoder, encode, freeze, gram_matrix
from app.style.mining import (TripletIndices, margin_triplet_loss, mine_ephn,
                              triplet_loss)
from app.style.pretrain import (cluster_quality, load_style_encoder,
                                pretrain_style_encoder, save_style_encoder)
