import type { BatchItem, BatchPayload } from "../src/api.js";

export function wgItem(i: number): BatchItem {
  return {
    instance_id: `wg-${i}`,
    task: "winogrande",
    task_fields: {
      schema: `The trophy would not fit in case ${i} because _ was too big.`,
      option1: `trophy${i}`,
      option2: `case${i}`,
    },
    label_options: [`trophy${i}`, `case${i}`],
    nles: [
      { slot_id: "a", text: `first explanation for item ${i}` },
      { slot_id: "b", text: `second explanation for item ${i}` },
    ],
  };
}

export function comveItem(i: number): BatchItem {
  return {
    instance_id: `cv-${i}`,
    task: "comve",
    task_fields: {
      statement1: `He put the lamp ${i} on the table.`,
      statement2: `He put the table on the lamp ${i}.`,
    },
    label_options: ["Statement 1", "Statement 2"],
    nles: [
      { slot_id: "a", text: `tables hold lamps, case ${i}` },
      { slot_id: "b", text: `lamps cannot hold tables, case ${i}` },
    ],
  };
}

export function batchOf(items: BatchItem[], id = "batch-000"): BatchPayload {
  return { batch_id: id, items };
}

export function tenItemBatch(): BatchPayload {
  return batchOf(Array.from({ length: 10 }, (_, i) => wgItem(i)));
}
