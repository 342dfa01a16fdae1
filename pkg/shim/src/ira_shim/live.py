"""Live backend wrapping open models via transformers.

Models load lazily on first use; requests arriving while a role is still
loading get HTTP 503 from the app layer. Chat-style completion models are
adapted to the completion surface by wrapping the prompt as a single user
message and returning the first assistant message.
"""

from __future__ import annotations

import base64
import io
import threading

from .config import ShimConfig


class ModelLoading(RuntimeError):
    """Raised while a role's weights are still being loaded."""


def _decode_image(image_b64: str):
    from PIL import Image

    return Image.open(io.BytesIO(base64.b64decode(image_b64))).convert("RGB")


class LiveBackend:
    def __init__(self, config: ShimConfig):
        self.config = config
        self.embed_dim = config.embed_dim
        self._models: dict[str, object] = {}
        self._loading: set[str] = set()
        self._lock = threading.Lock()

    def loaded_roles(self) -> list[str]:
        return sorted(self._models)

    def _get(self, role: str):
        with self._lock:
            if role in self._models:
                return self._models[role]
            if role in self._loading:
                raise ModelLoading(role)
            self._loading.add(role)
        try:
            loaded = self._load(role)
        finally:
            with self._lock:
                self._loading.discard(role)
        with self._lock:
            self._models[role] = loaded
        return loaded

    def _load(self, role: str):
        name = self.config.model_for(role)
        device = self.config.device
        if role == "completion":
            from transformers import AutoModelForCausalLM, AutoTokenizer

            tokenizer = AutoTokenizer.from_pretrained(name)
            model = AutoModelForCausalLM.from_pretrained(name).to(device).eval()
            return (tokenizer, model)
        if role == "vqa":
            from transformers import Blip2ForConditionalGeneration, Blip2Processor

            processor = Blip2Processor.from_pretrained(name)
            model = Blip2ForConditionalGeneration.from_pretrained(name).to(device).eval()
            return (processor, model)
        if role == "caption":
            from transformers import pipeline

            return pipeline("image-to-text", model=name, device=device)
        if role == "embed":
            from transformers import CLIPModel, CLIPProcessor

            processor = CLIPProcessor.from_pretrained(name)
            model = CLIPModel.from_pretrained(name).to(device).eval()
            self.embed_dim = model.config.projection_dim
            return (processor, model)
        raise ValueError(f"unknown role {role!r}")

    def complete(self, prompt: str, max_tokens: int, stop: list[str]) -> str:
        import torch

        tokenizer, model = self._get("completion")
        messages = [{"role": "user", "content": prompt}]
        inputs = tokenizer.apply_chat_template(
            messages, add_generation_prompt=True, return_tensors="pt"
        ).to(model.device)
        with torch.no_grad():
            output = model.generate(inputs, max_new_tokens=max_tokens, do_sample=False)
        text = tokenizer.decode(output[0][inputs.shape[1]:], skip_special_tokens=True)
        for sequence in stop:
            cut = text.find(sequence)
            if cut >= 0:
                text = text[:cut]
        return text

    def vqa(self, image_b64: str, question: str) -> str:
        import torch

        processor, model = self._get("vqa")
        image = _decode_image(image_b64)
        inputs = processor(image, text=f"Question: {question} Answer:", return_tensors="pt").to(
            model.device
        )
        with torch.no_grad():
            output = model.generate(**inputs, max_new_tokens=10)
        return processor.batch_decode(output, skip_special_tokens=True)[0].strip()

    def caption(self, image_b64: str, question: str | None) -> str:
        captioner = self._get("caption")
        image = _decode_image(image_b64)
        # question-aware captioning models accept the question as a text prompt
        kwargs = {"prompt": question} if question else {}
        try:
            result = captioner(image, **kwargs)
        except TypeError:
            result = captioner(image)
        return result[0]["generated_text"].strip()

    def embed(self, kind: str, payload: str) -> list[float]:
        import torch

        processor, model = self._get("embed")
        with torch.no_grad():
            if kind == "text":
                inputs = processor(text=[payload], return_tensors="pt", truncation=True)
                features = model.get_text_features(**{k: v.to(model.device) for k, v in inputs.items()})
            else:
                inputs = processor(images=[_decode_image(payload)], return_tensors="pt")
                features = model.get_image_features(**{k: v.to(model.device) for k, v in inputs.items()})
        vector = features[0]
        vector = vector / vector.norm()
        return vector.cpu().tolist()
