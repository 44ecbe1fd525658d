"""Tests for the three-stream embedding model assembly."""

import numpy as np
import pytest
import torch

from skyreid.adh import explain_pair
from skyreid.config import RunConfig
from skyreid.model import ReIDModel, build_model
from skyreid.schema import load_schema
from skyreid.types import CameraPlatform, ImageRecord


def make_model(eva=True, ep=True, num_classes=5, backbone="toyconv", channels=32,
               input_size=(64, 32), **kw):
    torch.manual_seed(0)
    schema = load_schema(88)
    return ReIDModel(
        schema,
        num_classes=num_classes,
        backbone=backbone,
        channels=channels,
        input_size=input_size,
        eva=eva,
        ep=ep,
        **kw,
    )


def images(b=4, size=(64, 32), seed=1):
    gen = torch.Generator().manual_seed(seed)
    return torch.rand((b, 3, *size), generator=gen)


class TestForwardContract:
    def test_full_model_output_shapes(self):
        model = make_model().eval()
        out = model.forward_features(images())
        assert out["feature_map"].shape == (4, 32, 8, 4)
        assert out["f_t"].shape == (4, 32)
        assert out["f"].shape == (4, 128)  # global (C) joined with 3-strip head (3C)
        assert out["logits"].shape == (4, 5)
        assert out["attention"].shape == (4, 88, 8, 4)
        assert out["attr_feats"].shape == (4, 88, 32)
        assert out["f_h"].shape == (4, 96)
        assert out["f_e"].shape == (4, 2)
        assert model.embedding_dim == 128

    def test_embeddings_are_normalized(self):
        model = make_model().eval()
        out = model.forward_features(images())
        for key in ("f", "f_t"):
            norms = out[key].norm(dim=1)
            assert torch.allclose(norms, torch.ones_like(norms), atol=1e-5)

    def test_attention_positive(self):
        model = make_model().eval()
        out = model.forward_features(images())
        assert (out["attention"] > 0).all()  # bounded positive activation

    def test_eva_off(self):
        model = make_model(eva=False).eval()
        out = model.forward_features(images())
        assert "f_h" not in out
        assert out["f"].shape == (4, 32)
        assert torch.equal(out["f"], out["f_t"])
        assert model.embedding_dim == 32

    def test_ep_off(self):
        model = make_model(ep=False).eval()
        out = model.forward_features(images())
        assert "attention" not in out and "attr_feats" not in out
        assert out["f"].shape == (4, 128)

    def test_embed_matches_forward(self):
        model = make_model().eval()
        x = images()
        with torch.no_grad():
            expected = model.forward_features(x)["f"]
        assert torch.allclose(model.embed(x), expected)

    def test_transformer_backbone(self):
        model = make_model(
            backbone="transformer", channels=16, input_size=(32, 16), patch_size=8,
            depth=1, heads=4,
        ).eval()
        out = model.forward_features(images(size=(32, 16)))
        assert out["feature_map"].shape == (4, 16, 4, 2)
        assert out["f"].shape == (4, 64)


class TestTrainingBehavior:
    def test_gradients_reach_all_enabled_streams(self):
        model = make_model()
        model.train()
        out = model.forward_features(images())
        loss = out["f"].sum() + out["logits"].sum() + out["attr_feats"].sum()
        loss.backward()
        grads_by_module = {}
        for name, p in model.named_parameters():
            module = name.split(".")[0]
            got = p.grad is not None and p.grad.abs().sum() > 0
            grads_by_module[module] = grads_by_module.get(module, False) or got
        for module in ("backbone", "classifier", "eva", "adh"):
            assert grads_by_module[module], f"no gradient reached {module}"

    def test_deterministic_given_seed(self):
        a = make_model().eval()
        b = make_model().eval()
        x = images()
        with torch.no_grad():
            assert torch.equal(a.forward_features(x)["f"], b.forward_features(x)["f"])

    def test_trained_steps_buffer(self):
        model = make_model()
        assert int(model.trained_steps) == 0
        assert "trained_steps" in model.state_dict()
        model.trained_steps += 3
        assert int(model.trained_steps) == 3

    def test_attribute_names_cover_schema(self):
        model = make_model()
        assert len(model.attribute_names) == 88
        assert model.attribute_names[0].startswith("gender=")


class TestBuildFromConfig:
    def test_build_model(self):
        cfg = RunConfig.from_dict(
            {
                "model": {"backbone": "toyconv", "channels": 32, "eva": True, "ep": True},
                "data": {"image_size": [64, 32]},
            }
        )
        schema = load_schema(cfg.mode)
        torch.manual_seed(cfg.seed)
        model = build_model(cfg, schema, num_classes=7)
        out = model.eval().forward_features(images())
        assert out["logits"].shape == (4, 7)
        assert model.input_size == (64, 32)

    def test_explain_pair_accepts_this_model(self):
        model = make_model().eval()
        recs = []
        rng = np.random.default_rng(0)
        for seq in range(2):
            recs.append(
                ImageRecord(
                    person_id=seq + 1,
                    platform=CameraPlatform.AERIAL,
                    sequence=0,
                    pixel_data=rng.random((64, 32, 3)).astype(np.float32),
                )
            )
        with pytest.warns(UserWarning, match="untrained"):
            expl = explain_pair(model, recs[0], recs[1])
        assert expl.ranking.shape == (88,)
        assert expl.saliency_i.shape == (88, 64, 32)
