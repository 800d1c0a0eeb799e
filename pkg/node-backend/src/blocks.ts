/** Closed-form trainable-parameter counts for the synthetic block stacks. */

/** Conv block (3x3 conv C->C with bias, batch norm scale+shift): 9C^2 + 3C. */
export function convBlockParams(width: number): number {
  return 9 * width * width + 3 * width;
}

/** MHA block (fused qkv + output projection, both biased): 4d^2 + 4d. */
export function mhaBlockParams(width: number): number {
  return 4 * width * width + 4 * width;
}

export function blockParams(kind: "conv" | "mha", width: number): number {
  return kind === "conv" ? convBlockParams(width) : mhaBlockParams(width);
}

export function stackParams(kind: "conv" | "mha", width: number, depth: number): number {
  return depth * blockParams(kind, width);
}
