"""Masked-LM backend: wraps a pretrained transformer behind the protocol.

All sub-word handling lives here: rendered token sequences arrive with
a single ``[MASK]`` literal, are re-tokenized with the model's own
tokenizer, and logits are read at the model's mask piece. The client
never sees sub-words.
"""

from __future__ import annotations

import tempfile
import time
from pathlib import Path
from typing import Sequence

from .protocol import PROTOCOL_VERSION

MASK_LITERAL = "[MASK]"

DEFAULT_LR = 1e-4
DEFAULT_EPOCHS = 1


class ModelError(RuntimeError):
    pass


class ModelBackend:
    capacity = 1

    def __init__(
        self,
        model_path: str,
        device: str = "cpu",
        max_seq: int = 128,
        batch_size: int = 8,
        checkpoint_dir: str | None = None,
    ) -> None:
        import torch
        from transformers import AutoModelForMaskedLM, AutoTokenizer

        self._torch = torch
        self.model_path = model_path
        self.device = device
        self.max_seq = max_seq
        self.batch_size = batch_size
        self.checkpoint_dir = Path(
            checkpoint_dir or tempfile.mkdtemp(prefix="cloze-bridge-ckpt-")
        )
        self.tokenizer = AutoTokenizer.from_pretrained(model_path)
        self.model = AutoModelForMaskedLM.from_pretrained(model_path)
        self.model.to(device)
        self.model.eval()
        if self.tokenizer.mask_token_id is None:
            raise ModelError(f"{model_path}: tokenizer has no mask token")

    def info(self) -> dict:
        return {
            "mode": "model",
            "protocol": PROTOCOL_VERSION,
            "model": str(self.model_path),
            "device": self.device,
            "max_seq": self.max_seq,
            "train_defaults": {
                "optimizer": "sgd",
                "lr": DEFAULT_LR,
                "epochs": DEFAULT_EPOCHS,
            },
        }

    def check_vocabulary(self, tokens: Sequence[str]) -> list[str]:
        offenders = []
        for token in tokens:
            pieces = self.tokenizer.tokenize(token)
            if len(pieces) != 1 or pieces[0] == self.tokenizer.unk_token:
                offenders.append(token)
        return offenders

    def _candidate_ids(self, candidates: Sequence[str]) -> list[int]:
        offenders = self.check_vocabulary(candidates)
        if offenders:
            raise ModelError(f"multi-piece candidates: {offenders}")
        return [
            self.tokenizer.convert_tokens_to_ids(self.tokenizer.tokenize(c)[0])
            for c in candidates
        ]

    def _encode(self, rendered_tokens: Sequence[str], mask_index: int):
        """Token ids with exactly one mask piece; left-trimmed to max_seq."""
        torch = self._torch
        tokens = list(rendered_tokens)
        if not 0 <= mask_index < len(tokens) or tokens[mask_index] != MASK_LITERAL:
            raise ModelError("mask_index does not point at the mask literal")
        tokens[mask_index] = self.tokenizer.mask_token
        text = " ".join(tokens)
        ids = self.tokenizer(text, add_special_tokens=True)["input_ids"]
        if len(ids) > self.max_seq:
            # keep the tail: the mask sits inside the pattern suffix
            ids = [ids[0]] + ids[-(self.max_seq - 1):]
        mask_positions = [
            pos for pos, idx in enumerate(ids) if idx == self.tokenizer.mask_token_id
        ]
        if len(mask_positions) != 1:
            raise ModelError(
                f"expected exactly one mask piece, found {len(mask_positions)}"
            )
        return torch.tensor([ids]), mask_positions[0]

    def score(
        self,
        rendered_tokens: Sequence[str],
        mask_index: int,
        candidates: Sequence[str],
    ) -> list[float]:
        torch = self._torch
        candidate_ids = self._candidate_ids(candidates)
        input_ids, mask_pos = self._encode(rendered_tokens, mask_index)
        with torch.no_grad():
            logits = self.model(input_ids.to(self.device)).logits
        row = logits[0, mask_pos, candidate_ids]
        return [float(v) for v in row.cpu()]

    def train(self, config: dict, candidates: Sequence[str], examples: Sequence[dict]) -> float:
        torch = self._torch
        candidate_ids = self._candidate_ids(candidates)
        lr = float(config.get("lr", DEFAULT_LR))
        epochs = int(config.get("epochs", DEFAULT_EPOCHS))
        torch.manual_seed(int(config.get("seed", 0)))

        encoded = [
            self._encode(ex["rendered_tokens"], ex["mask_index"]) for ex in examples
        ]
        targets = []
        for ex in examples:
            if "gold" in ex:
                row = [0.0] * len(candidates)
                row[int(ex["gold"])] = 1.0
            else:
                row = [float(v) for v in ex["soft"]]
            targets.append(row)
        target_tensor = torch.tensor(targets, dtype=torch.float32)

        optimizer = torch.optim.SGD(self.model.parameters(), lr=lr)
        self.model.train()
        final_loss = 0.0
        try:
            for _ in range(epochs):
                total = 0.0
                for start in range(0, len(encoded), self.batch_size):
                    chunk = encoded[start : start + self.batch_size]
                    chunk_targets = target_tensor[start : start + self.batch_size]
                    optimizer.zero_grad()
                    batch_loss = None
                    for (input_ids, mask_pos), target in zip(chunk, chunk_targets):
                        out = self.model(input_ids.to(self.device)).logits
                        restricted = out[0, mask_pos, candidate_ids]
                        logp = torch.log_softmax(restricted, dim=-1)
                        loss = -(target.to(self.device) * logp).sum()
                        batch_loss = loss if batch_loss is None else batch_loss + loss
                    batch_loss = batch_loss / len(chunk)
                    batch_loss.backward()
                    optimizer.step()
                    total += float(batch_loss.detach()) * len(chunk)
                final_loss = total / len(encoded)
        finally:
            self.model.eval()
        return final_loss

    def save(self) -> str:
        stamp = f"ckpt-{int(time.time() * 1000)}-{id(self) & 0xFFFF}"
        path = self.checkpoint_dir / stamp
        self.model.save_pretrained(path)
        self.tokenizer.save_pretrained(path)
        return str(path)

    def load(self, handle: str) -> None:
        from transformers import AutoModelForMaskedLM

        path = Path(handle)
        if not path.is_dir():
            raise ModelError(f"unknown checkpoint handle {handle!r}")
        self.model = AutoModelForMaskedLM.from_pretrained(path)
        self.model.to(self.device)
        self.model.eval()
