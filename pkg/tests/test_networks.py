import numpy as np
import pytest

from radsmith.core.errors import ArgumentError, CheckpointError
from radsmith.models.schemas import DenoiserSpec, DiscriminatorSpec, ModelSpec, SRSpec
from radsmith.services import autodiff as ad
from radsmith.services.autodiff import Tensor
from radsmith.services.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from radsmith.services.degrade import bicubic_resize
from radsmith.services.networks import (
    Discriminator,
    RCABlock,
    build_state,
    count_parameters,
    denoiser_forward,
    denoiser_parameter_count,
    discriminator_forward,
    discriminator_parameter_count,
    gan_value,
    load_state,
    merge_states,
    rca_block,
    sr_forward,
    sr_parameter_count,
)
from radsmith.services.training import restore


def _batch(rng, n=2, size=12):
    return Tensor(rng.random((n, 1, size, size)))


class TestIdentityAtInit:
    @pytest.mark.parametrize("block_type,mode", [("rca", "spatial_eq4"), ("rca", "channel_se"), ("dncnn", "spatial_eq4")])
    def test_fresh_denoiser_returns_input(self, rng, block_type, mode):
        spec = ModelSpec(denoiser=DenoiserSpec(n_rca_blocks=3, channels=4, block_type=block_type, attention_mode=mode))
        state = build_state(spec, seed=2, components=("denoiser",))
        y = _batch(rng)
        np.testing.assert_array_equal(denoiser_forward(y, state).data, y.data)

    @pytest.mark.parametrize("scale", [2, 4])
    def test_fresh_sr_net_is_bicubic(self, radiographs, scale):
        spec = ModelSpec(sr=SRSpec(n_res_blocks=2, channels=4, scale=scale))
        state = build_state(spec, seed=5, components=("sr",))
        lr = bicubic_resize(radiographs[0], 32 // scale, 32 // scale)
        np.testing.assert_array_equal(restore(state, lr).data, bicubic_resize(lr, 32, 32).data)

    def test_sr_output_shape(self, rng, tiny_spec):
        state = build_state(tiny_spec, components=("sr",))
        assert sr_forward(_batch(rng, n=3, size=7), state).shape == (3, 1, 14, 14)


class TestBlocks:
    def test_zero_gate_scales_input(self, rng):
        block = RCABlock(3, "spatial_eq4", rng)
        block.gate.weight.data[:] = 0.0
        block.gate.bias.data[:] = 0.0
        x = Tensor(rng.standard_normal((1, 3, 5, 5)))
        np.testing.assert_allclose(block(x).data, 1.5 * x.data)

    def test_channel_attention_broadcasts(self, rng):
        block = RCABlock(3, "channel_se", rng)
        x = Tensor(rng.standard_normal((2, 3, 6, 4)))
        assert block(x).shape == x.shape

    def test_block_function_matches_module(self, rng):
        block = RCABlock(3, "spatial_eq4", rng)
        x = Tensor(rng.standard_normal((1, 3, 6, 6)))
        np.testing.assert_array_equal(rca_block(x, block).data, block(x).data)

    def test_wrong_channel_count(self, rng):
        block = RCABlock(3, "spatial_eq4", rng)
        with pytest.raises(ArgumentError):
            block(Tensor(np.ones((1, 2, 4, 4))))

    def test_networks_need_grayscale(self, rng, tiny_spec):
        state = build_state(tiny_spec)
        with pytest.raises(ArgumentError):
            denoiser_forward(Tensor(np.ones((1, 3, 8, 8))), state)


class TestDiscriminator:
    def test_fresh_logits_are_zero(self, rng):
        disc = Discriminator(DiscriminatorSpec(n_layers=3, base_channels=4), rng)
        logits = disc(_batch(rng, n=4, size=16))
        assert logits.shape == (4, 1)
        assert not logits.data.any()

    def test_forward_through_state(self, rng, tiny_spec):
        state = build_state(tiny_spec, components=("discriminator",))
        assert discriminator_forward(_batch(rng, n=3, size=16), state).shape == (3, 1)
        with pytest.raises(ArgumentError):
            discriminator_forward(_batch(rng), build_state(tiny_spec, components=("sr",)))

    def test_gan_value_at_zero_logits(self):
        zeros = Tensor(np.zeros((4, 1)))
        value = gan_value(zeros, zeros)
        assert value.d_loss.item() == pytest.approx(2 * np.log(2.0))
        assert value.g_loss.item() == pytest.approx(np.log(2.0))
        assert value.g_loss_minimax.item() == pytest.approx(-np.log(2.0))

    def test_input_too_small(self, rng):
        disc = Discriminator(DiscriminatorSpec(n_layers=3, base_channels=2), rng)
        with pytest.raises(ArgumentError):
            disc(_batch(rng, n=1, size=4))

    def test_batch_size_mismatch(self):
        with pytest.raises(ArgumentError):
            gan_value(Tensor(np.zeros((2, 1))), Tensor(np.zeros((3, 1))))


class TestParameterCounts:
    @pytest.mark.parametrize("spec", [
        ModelSpec(),
        ModelSpec(denoiser=DenoiserSpec(attention_mode="channel_se"), sr=SRSpec(scale=2)),
        ModelSpec(denoiser=DenoiserSpec(n_rca_blocks=5, channels=7, block_type="dncnn"),
                  sr=SRSpec(n_res_blocks=3, channels=5, scale=4),
                  discriminator=DiscriminatorSpec(n_layers=5, base_channels=3)),
    ])
    def test_closed_form_matches_built_model(self, spec):
        state = build_state(spec)
        assert count_parameters(state.denoiser) == denoiser_parameter_count(spec.denoiser)
        assert count_parameters(state.sr) == sr_parameter_count(spec.sr)
        assert count_parameters(state.discriminator) == discriminator_parameter_count(spec.discriminator)

    def test_groups_partition_parameters(self, tiny_spec):
        state = build_state(tiny_spec)
        groups = state.groups()
        assert set(groups) == {"denoiser", "sr", "discriminator"}
        ids = [id(p) for params in groups.values() for p in params]
        assert len(ids) == len(set(ids)) == len(list(state.named_parameters()))


class TestState:
    def test_same_seed_same_weights(self, tiny_spec):
        a = build_state(tiny_spec, seed=7).arrays()
        b = build_state(tiny_spec, seed=7).arrays()
        c = build_state(tiny_spec, seed=8).arrays()
        assert all(np.array_equal(a[k], b[k]) for k in a)
        assert not np.array_equal(a["denoiser.head.weight"], c["denoiser.head.weight"])

    def test_unknown_component(self, tiny_spec):
        with pytest.raises(ArgumentError):
            build_state(tiny_spec, components=("generator",))

    def test_checkpoint_round_trip(self, tmp_path, tiny_spec, rng):
        state = build_state(tiny_spec, seed=3, components=("denoiser", "sr"))
        for _, p in state.named_parameters():
            p.data = rng.standard_normal(p.shape)
        state.save(tmp_path / "model.ckpt")
        loaded = load_state(tmp_path / "model.ckpt")
        assert loaded.spec == tiny_spec
        assert set(loaded.components()) == {"denoiser", "sr"}
        before, after = state.arrays(), loaded.arrays()
        assert before.keys() == after.keys()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_merge_states(self, tiny_spec):
        denoiser = build_state(tiny_spec, seed=1, components=("denoiser",))
        sr = build_state(tiny_spec, seed=2, components=("sr",))
        merged = merge_states(denoiser, sr)
        assert merged.denoiser is denoiser.denoiser and merged.sr is sr.sr
        with pytest.raises(ArgumentError):
            merge_states()

    def test_merge_keeps_each_component_spec(self, tmp_path, tiny_spec):
        small_denoiser = ModelSpec(denoiser=DenoiserSpec(n_rca_blocks=2, channels=3, block_type="dncnn"))
        denoiser = build_state(small_denoiser, seed=1, components=("denoiser",))
        sr = build_state(ModelSpec(), seed=2, components=("sr",))
        merged = merge_states(denoiser, sr)
        assert merged.spec.denoiser == small_denoiser.denoiser
        assert merged.spec.sr == ModelSpec().sr

        merged.save(tmp_path / "joint.ckpt")
        loaded = load_state(tmp_path / "joint.ckpt")
        assert loaded.spec == merged.spec
        before, after = merged.arrays(), loaded.arrays()
        assert before.keys() == after.keys()
        assert all(np.array_equal(before[k], after[k]) for k in before)

    def test_merge_rejects_conflicting_specs(self, tiny_spec):
        a = build_state(tiny_spec, components=("denoiser",))
        b = build_state(ModelSpec(), components=("denoiser", "sr"))
        with pytest.raises(ArgumentError):
            merge_states(a, b)

    def test_astype_casts_parameters(self, tiny_spec):
        state = build_state(tiny_spec, components=("denoiser", "sr")).astype(np.float32)
        assert all(p.dtype == np.float32 and p.grad.dtype == np.float32 for _, p in state.named_parameters())

    def test_shape_mismatch_on_load(self, tiny_spec):
        state = build_state(tiny_spec, components=("sr",))
        arrays = state.arrays()
        arrays["sr.head.weight"] = np.zeros((1, 1, 1, 1))
        with pytest.raises(CheckpointError):
            state.load_arrays(arrays)

    def test_missing_tensor_on_load(self, tiny_spec):
        state = build_state(tiny_spec, components=("sr",))
        arrays = state.arrays()
        del arrays["sr.tail.bias"]
        with pytest.raises(CheckpointError):
            state.load_arrays(arrays)

    def test_eval_disables_dropout(self, rng):
        spec = ModelSpec(denoiser=DenoiserSpec(n_rca_blocks=1, channels=3, dropout=0.5))
        state = build_state(spec, components=("denoiser",))
        state.denoiser.tail.weight.data = rng.standard_normal(state.denoiser.tail.weight.shape)
        y = _batch(rng, n=1, size=8)
        state.eval()
        with ad.no_grad():
            first = state.denoiser(y).data
            second = state.denoiser(y).data
        np.testing.assert_array_equal(first, second)


class TestCheckpointContainer:
    def test_round_trip_float32_and_metadata(self, tmp_path):
        tensors = {"a": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.array([1.5, -2.0])}
        save_checkpoint(tmp_path / "c.ckpt", tensors, {"note": "hi"})
        loaded, metadata = load_checkpoint(tmp_path / "c.ckpt")
        assert metadata == {"note": "hi"}
        assert list(loaded) == ["a", "b"]
        assert loaded["a"].dtype == np.float32
        np.testing.assert_array_equal(loaded["a"], tensors["a"])
        np.testing.assert_array_equal(loaded["b"], tensors["b"])

    def test_bad_magic(self, tmp_path):
        (tmp_path / "c.ckpt").write_bytes(b"NOTACKPT" + bytes(32))
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "c.ckpt")

    def test_truncated_body(self, tmp_path):
        path = tmp_path / "c.ckpt"
        save_checkpoint(path, {"a": np.ones(100)}, {})
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_integer_tensors_rejected(self, tmp_path):
        with pytest.raises(CheckpointError):
            save_checkpoint(tmp_path / "c.ckpt", {"a": np.ones(3, dtype=np.int64)}, {})

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointError):
            load_checkpoint(tmp_path / "absent.ckpt")

    def test_magic_prefix(self, tmp_path):
        save_checkpoint(tmp_path / "c.ckpt", {"a": np.ones(1)}, {})
        assert (tmp_path / "c.ckpt").read_bytes()[:8] == MAGIC
