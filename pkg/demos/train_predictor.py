"""Train a small predictor on synthetic traffic and compare it with the
kinematic baselines.

    python3 demos/train_predictor.py

Runs in a few seconds. The synthetic road has three lanes and a few lane
changes, so the learned model has something to beat the CV baseline on.
"""
from predrisk.data import extract_windows, split_dataset
from predrisk.model import ModelConfig
from predrisk.synthetic import synthetic_recording
from predrisk.training import TrainConfig, evaluate, train

rec = synthetic_recording(n_vehicles=18, duration=24.0, seed=7, lane_change_prob=0.5)
samples = extract_windows(rec)
split = split_dataset(samples, seed=0)
by_id = {s.sample_id: s for s in samples}
train_s, val_s, test_s = ([by_id[i] for i in getattr(split, part)] for part in ("train", "val", "test"))
print(f"{len(samples)} windows: {len(train_s)} train / {len(val_s)} val / {len(test_s)} test")

mcfg = ModelConfig(encoder_hidden=16, decoder_hidden=32, conv1_filters=16, conv2_filters=8,
                   gat_dim=16, ch1_dim=16, output_anchor="cv", output_scale=1.0)
tcfg = TrainConfig(batch_size=32, pretrain_epochs=15, formal_epochs=10, lr=3e-3, formal_lr=3e-4)
result = train(train_s, val_s, mcfg, tcfg)
print(f"best validation loss {result.best_val:.3f} at epoch {result.best_epoch}")

reports = [evaluate(result.predictor, test_s), evaluate("cv", test_s), evaluate("ca", test_s)]
print("\n" + reports[0].to_csv().splitlines()[0])
for r in reports:
    print(r.to_csv().splitlines()[1])

