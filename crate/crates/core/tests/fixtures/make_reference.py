"""Regenerates tiny_sam*.safetensors with the upstream segment_anything modules.

    python3 make_reference.py

Requires torch, safetensors and segment_anything.
"""
from functools import partial

import torch
from safetensors.torch import save_file
from segment_anything.modeling import (
    ImageEncoderViT,
    MaskDecoder,
    PromptEncoder,
    TwoWayTransformer,
)
from segment_anything.modeling.mask_decoder import MLP
from segment_anything.modeling.transformer import Attention

torch.manual_seed(7)
C, SIZE, GRID = 32, 80, 5

encoder = ImageEncoderViT(
    img_size=SIZE, patch_size=16, embed_dim=32, depth=2, num_heads=2, mlp_ratio=4,
    out_chans=C, qkv_bias=True, norm_layer=partial(torch.nn.LayerNorm, eps=1e-6),
    use_rel_pos=True, rel_pos_zero_init=False, window_size=2, global_attn_indexes=[1],
)
prompt = PromptEncoder(
    embed_dim=C, image_embedding_size=(GRID, GRID), input_image_size=(SIZE, SIZE), mask_in_chans=4
)
decoder = MaskDecoder(
    transformer_dim=C,
    transformer=TwoWayTransformer(depth=2, embedding_dim=C, mlp_dim=48, num_heads=2, attention_downsample_rate=4),
    num_multimask_outputs=3, iou_head_depth=3, iou_head_hidden_dim=24,
)
for layer in decoder.transformer.layers:
    layer.self_attn = Attention(C, 2, downsample_rate=2)
decoder.output_upscaling[0] = torch.nn.ConvTranspose2d(C, 8, kernel_size=2, stride=2)
decoder.output_upscaling[1].weight.data = torch.ones(8)
decoder.output_upscaling[1].bias.data = torch.zeros(8)
decoder.output_upscaling[3] = torch.nn.ConvTranspose2d(8, 4, kernel_size=2, stride=2)
decoder.output_hypernetworks_mlps = torch.nn.ModuleList([MLP(C, 20, 4, 3) for _ in range(4)])

with torch.no_grad():
    for module in (encoder, prompt, decoder):
        for name, p in module.named_parameters():
            if "norm" in name or name.startswith("output_upscaling.1") or "mask_downscaling.1" in name or "mask_downscaling.4" in name:
                p.add_(0.1 * torch.randn_like(p))
        encoder.pos_embed.normal_(0, 0.1)

state = {}
for prefix, module in (("image_encoder", encoder), ("prompt_encoder", prompt), ("mask_decoder", decoder)):
    for k, v in module.state_dict().items():
        state[f"{prefix}.{k}"] = v.detach().contiguous()
save_file(state, "tiny_sam.safetensors")

x = torch.randn(1, 3, SIZE, SIZE)
box = torch.tensor([[10.0, 12.0, 50.0, 70.0]])
with torch.no_grad():
    emb = encoder(x)
    sparse, dense = prompt(points=None, boxes=box, masks=None)
    pe = prompt.get_dense_pe()
emb.requires_grad_(False)
masks, iou = decoder.predict_masks(emb, pe, sparse, dense)
weights = torch.randn(SIZE // 4, SIZE // 4)
(masks[0, 0] * weights).sum().backward()
upsampled = torch.nn.functional.interpolate(masks[:, :1].detach(), (SIZE, SIZE), mode="bilinear", align_corners=False)

io = {
    "input": x[0].permute(1, 2, 0).reshape(-1, 3).contiguous(),
    "embedding": emb[0].permute(1, 2, 0).reshape(-1, C).contiguous(),
    "box": box[0],
    "sparse": sparse[0].contiguous(),
    "dense_pe": pe[0].permute(1, 2, 0).reshape(-1, C).contiguous(),
    "masks": masks.detach()[0].reshape(4, -1).contiguous(),
    "iou": iou.detach()[0].contiguous(),
    "upsampled": upsampled[0, 0].contiguous(),
    "mask_weights": weights,
}
for name, p in decoder.named_parameters():
    if p.grad is not None:
        io[f"grad.mask_decoder.{name}"] = p.grad.contiguous()
save_file(io, "tiny_sam_io.safetensors")
print(len(state), "weights,", len(io), "reference tensors")
