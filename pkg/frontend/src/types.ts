/** Wire types mirroring the annotation service's JSON schema. */

export type LabelValue = string | number;

export interface ClassSchema {
  kind: "class";
  labels: string[];
}

export interface RankSchema {
  kind: "rank";
  lo: number;
  hi: number;
}

export type LabelSchema = ClassSchema | RankSchema;

export interface BatchSummary {
  batch_id: string;
  status: "pending" | "completed" | "cancelled";
  task_description: string;
  total: number;
  labeled: number;
  schema_kind: "class" | "rank";
}

export interface BatchRecord {
  record_id: number;
  text: string;
}

export interface BatchDetail {
  batch_id: string;
  status: "pending" | "completed" | "cancelled";
  task_description: string;
  label_schema: LabelSchema;
  records: BatchRecord[];
  submitted_labels: Record<string, LabelValue>;
}

/** The label options a batch's schema offers, in display order. */
export function schemaOptions(schema: LabelSchema): LabelValue[] {
  if (schema.kind === "class") {
    return [...schema.labels];
  }
  const options: number[] = [];
  for (let v = schema.lo; v <= schema.hi; v++) {
    options.push(v);
  }
  return options;
}
