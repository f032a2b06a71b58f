import { z } from "zod";

// Every payload is parsed with a *strict* schema: an unexpected field is a
// protocol violation, not something to carry along silently.  Participants
// must never learn which condition produced the text they are reading, so if
// the server ever started leaking extra fields we want the client to fail
// loudly rather than stash them in state where a devtools user could see
// them.

export const QualifyReply = z.strictObject({
  worker_id: z.string(),
  group: z.number().int().nonnegative(),
  registered: z.boolean(),
});
export type QualifyReply = z.infer<typeof QualifyReply>;

export const HitItem = z.strictObject({
  review_id: z.string(),
  text: z.string(),
  answered: z.boolean(),
});
export type HitItem = z.infer<typeof HitItem>;

export const HitPayload = z.strictObject({
  hit_id: z.string(),
  items: z.array(HitItem).min(1),
  labels: z.array(z.string()).min(2),
  confidence_min: z.number().int(),
  confidence_max: z.number().int(),
  completed_hits: z.number().int().nonnegative(),
  total_hits: z.number().int().positive(),
});
export type HitPayload = z.infer<typeof HitPayload>;

export const SubmitReply = z.strictObject({
  accepted: z.boolean(),
  remaining_in_hit: z.number().int().nonnegative(),
});
export type SubmitReply = z.infer<typeof SubmitReply>;
