"""Shadow removal via inpainting pretraining and adaptive feature fusion."""

from .data import (InpaintSample, ShadowTriplet, generate_synthetic_inpaint,
                   generate_synthetic_shadow, load_triplet_dataset, make_shadow_masked,
                   sample_irregular_mask, save_triplet_dataset, subset_fraction)
from .evaluation import (EvalReport, evaluate_dataset, otsu_shadow_mask, psnr,
                         region_rmse, rgb_to_lab, ssim, weight_maps)
from .losses import (FeatureExtractor, LossWeights, PatchDiscriminator, gan_losses,
                     gram, masked_l1, perceptual_loss, style_loss, total_inpaint_loss)
from .networks import (ABLATION_VARIANTS, EncoderDecoderConfig, FusionBlockSpec,
                       FusionNet, FusionNetConfig, LayerSpec, NaiveEncoderDecoder,
                       build_fusion_network, build_naive_encoder_decoder,
                       forward_encoder, forward_fusion_block, forward_fusion_network,
                       make_ablation_variant)
from .training import (RunManifest, TrainConfig, TrainingDiverged, finetune, pretrain,
                       run_pretrain_cadence_study)

__version__ = "0.1.0"
