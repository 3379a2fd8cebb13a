"""Noise-prediction backends the server can dispatch requests to."""

from __future__ import annotations

import numpy as np


class EchoBackend:
    """Returns the injected noise verbatim.

    Lets integration suites check the transport end to end without model
    weights: a client computing (predicted - injected) sees an exact zero.
    """

    def predict(self, timestep: int, noisy: np.ndarray, noise: np.ndarray,
                prompt: str) -> np.ndarray:
        return noise


class DiffusionBackend:
    """Latent-diffusion denoiser behind the image-space contract.

    The request's noised rendering is encoded into the model's latent
    space, the UNet predicts latent noise conditioned on the prompt and
    timestep (with classifier-free guidance), and the prediction is pulled
    back to image space through the encoder's vector-Jacobian product.
    Clients therefore never see latent shapes.
    """

    def __init__(self, model_id: str, device: str = "cpu",
                 cfg_scale: float = 7.5):
        import torch
        from diffusers import AutoencoderKL, UNet2DConditionModel
        from transformers import CLIPTextModel, CLIPTokenizer

        self._torch = torch
        self.device = device
        self.cfg_scale = float(cfg_scale)
        self.vae = AutoencoderKL.from_pretrained(
            model_id, subfolder="vae").to(device).eval()
        self.unet = UNet2DConditionModel.from_pretrained(
            model_id, subfolder="unet").to(device).eval()
        self.tokenizer = CLIPTokenizer.from_pretrained(
            model_id, subfolder="tokenizer")
        self.text_encoder = CLIPTextModel.from_pretrained(
            model_id, subfolder="text_encoder").to(device).eval()
        self._embed_cache: dict[str, object] = {}

    def _embed(self, prompt: str):
        if prompt not in self._embed_cache:
            tokens = self.tokenizer([prompt], padding="max_length",
                                    max_length=self.tokenizer.model_max_length,
                                    truncation=True, return_tensors="pt")
            with self._torch.no_grad():
                emb = self.text_encoder(
                    tokens.input_ids.to(self.device))[0]
            self._embed_cache[prompt] = emb
        return self._embed_cache[prompt]

    def predict(self, timestep: int, noisy: np.ndarray, noise: np.ndarray,
                prompt: str) -> np.ndarray:
        torch = self._torch
        x = torch.tensor(noisy, dtype=torch.float32,
                         device=self.device).permute(2, 0, 1)[None]
        x = x.requires_grad_(True)

        latents = self.vae.encode(2.0 * x - 1.0).latent_dist.mean
        latents = latents * self.vae.config.scaling_factor

        t = torch.tensor([timestep], device=self.device)
        cond = self._embed(prompt)
        uncond = self._embed("")
        with torch.no_grad():
            eps_c = self.unet(latents.detach(), t,
                              encoder_hidden_states=cond).sample
            eps_u = self.unet(latents.detach(), t,
                              encoder_hidden_states=uncond).sample
        eps_latent = eps_u + self.cfg_scale * (eps_c - eps_u)

        (pullback,) = torch.autograd.grad(latents, x,
                                          grad_outputs=eps_latent)
        field = pullback[0].permute(1, 2, 0).detach().cpu().numpy()
        return np.asarray(field, dtype=np.float64)


def make_backend(echo: bool, model_id: str, device: str,
                 cfg_scale: float):
    if echo:
        return EchoBackend()
    return DiffusionBackend(model_id, device, cfg_scale)
