import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

MNIST_DIR = os.environ.get("SPIKECODE_MNIST", "/root/data/mnist")
CIFAR10_DIR = os.environ.get("SPIKECODE_CIFAR10", "/root/data/cifar-10-batches-bin")
