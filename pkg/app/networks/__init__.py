from app.networks.generator import (AdaINParams, Generator, MappingNetwork,
                                    adain, generate, map_style)
from app.networks.discriminator import (MultiTaskDiscriminator, SNConv2d,
                                        r1_penalty, spectral_normalize)
