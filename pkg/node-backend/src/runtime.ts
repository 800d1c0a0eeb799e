/**
 * Realize block-stack models as live tfjs computations.
 *
 * Parameter budget per block matches the closed forms in blocks.ts exactly:
 *   conv: W[3,3,C,C] + bias[C] + bnScale[C] + bnShift[C]      = 9C^2 + 3C
 *   mha:  Wqkv[d,3d] + bqkv[3d] + Wo[d,d] + bo[d]             = 4d^2 + 4d
 * Normalization layers are affine-free beyond the counted scale/shift, so
 * countParams() is the sum of trainable variable sizes and nothing else.
 */
import type * as tf from "@tensorflow/tfjs";

import { BlockSpec, ModelSpec } from "./protocol";

type TF = typeof tf;

export interface RealizedModel {
  /** One full inference of the stack; caller owns tidy scoping. */
  forward(input: tf.Tensor): tf.Tensor;
  countParams(): number;
  /** Pre-materialized random input for the given batch size. */
  makeInput(batchSize: number): tf.Tensor;
}

interface ConvBlockVars {
  kernel: tf.Variable;
  bias: tf.Variable;
  scale: tf.Variable;
  shift: tf.Variable;
}

class ConvStack implements RealizedModel {
  private blocks: ConvBlockVars[] = [];

  constructor(
    private t: TF,
    private width: number,
    depth: number,
    private inputShape: number[],
  ) {
    for (let i = 0; i < depth; i++) {
      this.blocks.push({
        kernel: this.t.variable(this.t.randomNormal([3, 3, width, width], 0, 0.05)),
        bias: this.t.variable(this.t.zeros([width])),
        scale: this.t.variable(this.t.ones([width])),
        shift: this.t.variable(this.t.zeros([width])),
      });
    }
  }

  makeInput(batchSize: number): tf.Tensor {
    // plan shapes are channel-first (C,H,W); tfjs convolves NHWC
    const [c, h, w] = this.inputShape;
    return this.t.randomNormal([batchSize, h, w, c]);
  }

  forward(input: tf.Tensor): tf.Tensor {
    const t = this.t;
    let x = input as tf.Tensor4D;
    const inChannels = x.shape[3] as number;
    if (inChannels < this.width) {
      // channel-pad the image up to the block width; adds no parameters
      x = t.pad(x, [
        [0, 0],
        [0, 0],
        [0, 0],
        [0, this.width - inChannels],
      ]);
    } else if (inChannels > this.width) {
      x = t.slice(x, [0, 0, 0, 0], [-1, -1, -1, this.width]);
    }
    for (const block of this.blocks) {
      const conv = t.add(
        t.conv2d(x, block.kernel as tf.Tensor4D, 1, "same"),
        block.bias,
      ) as tf.Tensor4D;
      const { mean, variance } = t.moments(conv, [0, 1, 2]);
      const normed = t.add(
        t.mul(t.div(t.sub(conv, mean), t.sqrt(t.add(variance, 1e-5))), block.scale),
        block.shift,
      );
      x = t.relu(normed) as tf.Tensor4D;
    }
    return x;
  }

  countParams(): number {
    return this.blocks.reduce(
      (n, b) => n + b.kernel.size + b.bias.size + b.scale.size + b.shift.size,
      0,
    );
  }
}

interface MhaBlockVars {
  wqkv: tf.Variable;
  bqkv: tf.Variable;
  wo: tf.Variable;
  bo: tf.Variable;
}

class MhaStack implements RealizedModel {
  private blocks: MhaBlockVars[] = [];
  private heads: number;

  constructor(
    private t: TF,
    private width: number,
    depth: number,
    private inputShape: number[],
  ) {
    this.heads = width % 4 === 0 ? 4 : 1;
    for (let i = 0; i < depth; i++) {
      this.blocks.push({
        wqkv: this.t.variable(this.t.randomNormal([width, 3 * width], 0, 0.05)),
        bqkv: this.t.variable(this.t.zeros([3 * width])),
        wo: this.t.variable(this.t.randomNormal([width, width], 0, 0.05)),
        bo: this.t.variable(this.t.zeros([width])),
      });
    }
  }

  makeInput(batchSize: number): tf.Tensor {
    const [seq] = this.inputShape;
    return this.t.randomNormal([batchSize, seq, this.width]);
  }

  forward(input: tf.Tensor): tf.Tensor {
    const t = this.t;
    const d = this.width;
    const h = this.heads;
    const dh = d / h;
    let x = input as tf.Tensor3D;
    const [b, s] = [x.shape[0], x.shape[1]];
    for (const block of this.blocks) {
      const qkv = t.add(
        t.matMul(t.reshape(x, [b * s, d]), block.wqkv as tf.Tensor2D),
        block.bqkv,
      );
      const [q, k, v] = t.split(t.reshape(qkv, [b, s, 3 * d]), 3, 2);
      const toHeads = (y: tf.Tensor) => t.transpose(t.reshape(y, [b, s, h, dh]), [0, 2, 1, 3]);
      const scores = t.div(
        t.matMul(toHeads(q), toHeads(k), false, true),
        Math.sqrt(dh),
      );
      const context = t.matMul(t.softmax(scores, 3), toHeads(v));
      const merged = t.reshape(t.transpose(context, [0, 2, 1, 3]), [b * s, d]);
      const projected = t.add(t.matMul(merged, block.wo as tf.Tensor2D), block.bo);
      const residual = t.add(t.relu(t.reshape(projected, [b, s, d])), x);
      // affine-free layer norm over the feature axis
      const { mean, variance } = t.moments(residual, [2], true);
      x = t.div(t.sub(residual, mean), t.sqrt(t.add(variance, 1e-5))) as tf.Tensor3D;
    }
    return x;
  }

  countParams(): number {
    return this.blocks.reduce(
      (n, b) => n + b.wqkv.size + b.bqkv.size + b.wo.size + b.bo.size,
      0,
    );
  }
}

export function realizeBlockStack(t: TF, block: BlockSpec, inputShape: number[]): RealizedModel {
  if (block.kind === "conv") {
    return new ConvStack(t, block.width, block.depth, inputShape);
  }
  return new MhaStack(t, block.width, block.depth, inputShape);
}

export function realizeModel(t: TF, model: ModelSpec): RealizedModel {
  if (model.block === undefined) {
    throw new Error("only block-stack models can be realized by this backend");
  }
  return realizeBlockStack(t, model.block, model.input_shape);
}
