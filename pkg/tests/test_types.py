"""Tests for domain types: construction invariants and serialization."""

import numpy as np
import pytest

from skyreid.schema import SchemaError, load_schema
from skyreid.types import (
    AffineParams,
    AttributeVector,
    CameraPlatform,
    DistanceDecomposition,
    FeatureMap,
    FeatureVector,
    ImageRecord,
    ParseError,
    ProtocolResult,
    validate_attribute_vector,
)


class TestCameraPlatform:
    def test_codes(self):
        assert CameraPlatform.AERIAL.code == "A"
        assert CameraPlatform.CCTV.code == "C"
        assert CameraPlatform.WEARABLE.code == "W"

    def test_from_code_roundtrip(self):
        for p in CameraPlatform:
            assert CameraPlatform.from_code(p.code) is p

    def test_unknown_code(self):
        with pytest.raises(ParseError):
            CameraPlatform.from_code("X")


class TestImageRecord:
    def test_pixels_clamped_and_frozen(self):
        px = np.full((16, 16, 3), 2.0, dtype=np.float32)
        rec = ImageRecord(person_id=1, platform=CameraPlatform.AERIAL, sequence=0, pixel_data=px)
        assert rec.pixel_data.max() == 1.0
        with pytest.raises(ValueError):
            rec.pixel_data[0, 0, 0] = 0.5

    def test_too_small_rejected(self):
        with pytest.raises(ValueError):
            ImageRecord(
                person_id=1,
                platform=CameraPlatform.CCTV,
                sequence=0,
                pixel_data=np.zeros((8, 16, 3), dtype=np.float32),
            )

    def test_key(self):
        rec = ImageRecord(person_id=7, platform=CameraPlatform.WEARABLE, sequence=3)
        assert rec.key == (7, "W", 3)

    def test_dict_roundtrip(self):
        px = np.random.default_rng(0).random((16, 20, 3)).astype(np.float32)
        rec = ImageRecord(
            person_id=5,
            platform=CameraPlatform.CCTV,
            sequence=2,
            pixel_data=px,
            source_path="test/0005_C_2.png",
        )
        assert ImageRecord.from_dict(rec.to_dict()) == rec


class TestAttributeVector:
    def test_all_groups_one_hot_is_valid(self):
        schema = load_schema(88)
        labels = {g.name: g.categories[-1] for g in schema.groups}
        v = AttributeVector.from_labels(labels, schema)
        assert validate_attribute_vector(v) is True

    def test_double_bit_group_is_invalid(self):
        schema = load_schema(88)
        labels = {g.name: g.categories[0] for g in schema.groups}
        bits = schema.encode(labels).copy()
        bits[1] = 1
        v = object.__new__(AttributeVector)
        object.__setattr__(v, "bits", bits)
        object.__setattr__(v, "schema", schema)
        assert validate_attribute_vector(v) is False

    def test_length_mismatch_raises(self):
        schema = load_schema(88)
        v = object.__new__(AttributeVector)
        object.__setattr__(v, "bits", np.zeros(0, dtype=np.uint8))
        object.__setattr__(v, "schema", schema)
        with pytest.raises(SchemaError):
            validate_attribute_vector(v)

    def test_constructor_rejects_wrong_length(self):
        schema = load_schema(38)
        with pytest.raises(SchemaError):
            AttributeVector(bits=np.zeros(88, dtype=np.uint8), schema=schema)

    def test_labels_roundtrip(self):
        schema = load_schema(28)
        labels = {g.name: g.categories[0] for g in schema.groups}
        v = AttributeVector.from_labels(labels, schema)
        assert v.labels() == labels
        assert len(v) == 28


class TestAffineParams:
    def test_valid_window(self):
        p = AffineParams(s_x=1.0, s_y=0.33, t_x=0.0, t_y=-0.67)
        assert p.to_dict()["s_y"] == 0.33

    def test_scale_bounds(self):
        with pytest.raises(ValueError):
            AffineParams(s_x=0.0, s_y=0.5, t_x=0.0, t_y=0.0)
        with pytest.raises(ValueError):
            AffineParams(s_x=1.2, s_y=0.5, t_x=0.0, t_y=0.0)

    def test_window_must_stay_inside(self):
        with pytest.raises(ValueError):
            AffineParams(s_x=0.5, s_y=0.5, t_x=0.8, t_y=0.0)

    def test_dict_roundtrip(self):
        p = AffineParams(s_x=0.9, s_y=0.25, t_x=0.05, t_y=-0.7)
        assert AffineParams.from_dict(p.to_dict()) == p


class TestFeatureContainers:
    def test_feature_map_shape(self):
        fm = FeatureMap(data=np.ones((4, 2, 3)))
        assert fm.channels == 4
        assert fm.grid == (2, 3)
        with pytest.raises(ValueError):
            FeatureMap(data=np.ones((4, 2)))

    def test_feature_map_rejects_nan(self):
        bad = np.ones((2, 2, 2))
        bad[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureMap(data=bad)

    def test_feature_vector_norm_flag(self):
        v = np.array([3.0, 4.0])
        fv = FeatureVector(data=v / 5.0, normalized=True)
        assert len(fv) == 2
        with pytest.raises(ValueError):
            FeatureVector(data=v, normalized=True)

    def test_feature_roundtrips(self):
        fm = FeatureMap(data=np.arange(12, dtype=np.float64).reshape(3, 2, 2))
        assert FeatureMap.from_dict(fm.to_dict()) == fm
        fv = FeatureVector(data=np.array([1.0, 2.0]), normalized=False)
        assert FeatureVector.from_dict(fv.to_dict()) == fv


class TestDistanceDecomposition:
    def test_from_parts_reconstructs_exactly(self):
        per = np.array([0.1, 0.2, 0.3])
        d = DistanceDecomposition.from_parts(total=0.61, per_attribute=per)
        assert d.reconstructed == float(per.sum())

    def test_mismatched_reconstruction_rejected(self):
        with pytest.raises(ValueError):
            DistanceDecomposition(
                total=0.6, per_attribute=np.array([0.1, 0.2, 0.3]), reconstructed=0.7
            )

    def test_negative_component_rejected(self):
        with pytest.raises(ValueError):
            DistanceDecomposition.from_parts(total=0.1, per_attribute=np.array([0.2, -0.1]))

    def test_dict_roundtrip(self):
        d = DistanceDecomposition.from_parts(total=1.5, per_attribute=np.array([0.5, 1.0]))
        assert DistanceDecomposition.from_dict(d.to_dict()) == d


class TestProtocolResult:
    def make(self, **kw):
        base = dict(
            query_platform=CameraPlatform.AERIAL,
            gallery_platform=CameraPlatform.CCTV,
            mAP=0.5,
            cmc={1: 0.4, 5: 0.6, 10: 0.7},
            query_count=100,
            gallery_count=300,
        )
        base.update(kw)
        return ProtocolResult(**base)

    def test_direction_string(self):
        assert self.make().direction == "A->C"

    def test_cmc_must_be_monotone(self):
        with pytest.raises(ValueError):
            self.make(cmc={1: 0.9, 5: 0.8})

    def test_score_ranges(self):
        with pytest.raises(ValueError):
            self.make(mAP=1.2)
        with pytest.raises(ValueError):
            self.make(cmc={1: -0.1})

    def test_dict_roundtrip(self):
        r = self.make()
        assert ProtocolResult.from_dict(r.to_dict()) == r
