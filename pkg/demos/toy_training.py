"""Train both model variants on the synthetic sine/square problem.

Run with ``python3 demos/toy_training.py``. Takes about 15 seconds.
"""

import numpy as np

from mlstmfcn import data as dt
from mlstmfcn import model as md
from mlstmfcn import optim as op


def main():
    train_raw, test_raw = dt.make_toy_splits(seed=0, n_train=40, n_test=40, num_variables=3, length=32)
    # Statistics come from the training split only.
    (train_raw, test_raw), stats = dt.znormalize(train_raw, test_raw)
    train = dt.to_dataset(train_raw, 32, stats, "train")
    test = dt.to_dataset(test_raw, 32, stats, "test")
    print(f"{len(train)} train / {len(test)} test samples, M=3 variables, N=32 steps")

    for attention in (False, True):
        config = md.ModelConfig(
            num_variables=3, max_length=32, num_classes=2, conv_filters=(8, 16, 8),
            se_reduction=2, lstm_cells=8, attention=attention,
        )
        # M < N here, so the LSTM sees the dimension-shuffled input.
        print(f"\n{'MALSTM-FCN' if attention else 'MLSTM-FCN'}: shuffled={md.should_shuffle(config)}")
        params = op.init_params(config, np.random.default_rng(0))

        def on_epoch(entry):
            if entry.epoch % 50 == 0:
                print(f"  epoch {entry.epoch:3d}  lr {entry.lr:.2e}  loss {entry.train_loss:.4f}")

        fitted = op.fit(params, config, train, op.TrainPlan(epochs=300, batch_size=16), on_epoch=on_epoch).params
        print(f"  train accuracy {100 * op.accuracy(fitted, config, train):.1f}%")
        print(f"  test accuracy  {100 * op.accuracy(fitted, config, test):.1f}%")

        pred = md.forward(fitted, config, test.samples[0], test.masks[0])
        print(f"  first test sample: class {pred.predicted_class}, p={np.round(pred.class_probabilities, 3)}")


if __name__ == "__main__":
    main()
