#ifndef PACHYDERM_H
#define PACHYDERM_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum PchStatus {
  PCH_STATUS_OK = 0,
  PCH_STATUS_NULL_ARGUMENT = 1,
  PCH_STATUS_INVALID_UTF8 = 2,
  PCH_STATUS_BUSY = 3,
  PCH_STATUS_UNKNOWN_CLASS = 4,
  PCH_STATUS_UNKNOWN_SLOT = 5,
  PCH_STATUS_UNKNOWN_OID = 6,
  PCH_STATUS_DELETED = 7,
  PCH_STATUS_UNBOUND_SLOT = 8,
  PCH_STATUS_NON_SERIALIZABLE = 9,
  PCH_STATUS_CODEC = 10,
  PCH_STATUS_SCHEMA = 11,
  PCH_STATUS_HOOK = 12,
  PCH_STATUS_LOCKED = 13,
  PCH_STATUS_BAD_MAGIC = 14,
  PCH_STATUS_IO = 15,
  PCH_STATUS_DIRTY = 16,
  PCH_STATUS_GRAPH = 17,
  PCH_STATUS_BUFFER_TOO_SMALL = 18,
  PCH_STATUS_PANIC = 19,
  PCH_STATUS_OTHER = 20,
} PchStatus;

/**
 * Opaque session handle.
 */
typedef struct PchSession PchSession;

/**
 * Bytes owned by the library; release with [`pch_buffer_free`].
 */
typedef struct PchBuffer {
  uint8_t *data;
  size_t len;
} PchBuffer;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or an empty string.
 * Valid until the next call on this thread.
 */
const char *pch_last_error_message(void);

/**
 * Opens (creating if needed) the store at `path`.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum PchStatus pch_open(const char *path, bool force_unlock, struct PchSession **out);

/**
 * Closes a session, discarding staged changes. Null is ignored.
 *
 * # Safety
 * `session` must come from [`pch_open`] and not be used afterwards.
 */
void pch_close(struct PchSession *session);

/**
 * Makes staged changes durable. `out_seq` (may be null) receives the
 * commit sequence number.
 *
 * # Safety
 * `session` must be live; `out_seq` null or writable.
 */
enum PchStatus pch_commit(struct PchSession *session, uint64_t *out_seq);

/**
 * Discards staged changes.
 *
 * # Safety
 * `session` must be live.
 */
enum PchStatus pch_rollback(struct PchSession *session);

/**
 * Defines or redefines every class in a schema text. Unchanged classes
 * are left alone. Staged until the next commit.
 *
 * # Safety
 * `session` must be live; `schema` NUL-terminated.
 */
enum PchStatus pch_set_schema(struct PchSession *session, const char *schema);

/**
 * Current version of `class_name` into `out_version`.
 *
 * # Safety
 * `session` must be live; `class_name` NUL-terminated; `out_version` writable.
 */
enum PchStatus pch_class_version(struct PchSession *session,
                                 const char *class_name,
                                 uint32_t *out_version);

/**
 * Creates an instance of `class_name` with its slot defaults.
 *
 * # Safety
 * `session` must be live; `class_name` NUL-terminated; `out_oid` writable.
 */
enum PchStatus pch_create(struct PchSession *session, const char *class_name, uint64_t *out_oid);

/**
 * Stages deletion of an object.
 *
 * # Safety
 * `session` must be live.
 */
enum PchStatus pch_delete(struct PchSession *session, uint64_t oid_);

/**
 * Writes an encoded value into a slot.
 *
 * # Safety
 * `session` must be live; `slot` NUL-terminated; `value` points at `len`
 * readable bytes.
 */
enum PchStatus pch_slot_write(struct PchSession *session,
                              uint64_t oid_,
                              const char *slot,
                              const uint8_t *value,
                              size_t len);

/**
 * Reads a slot as an encoded value. An unbound slot fails with
 * `UNBOUND_SLOT` and leaves `out` untouched.
 *
 * # Safety
 * `session` must be live; `slot` NUL-terminated; `out` writable.
 */
enum PchStatus pch_slot_read(struct PchSession *session,
                             uint64_t oid_,
                             const char *slot,
                             struct PchBuffer *out);

/**
 * Makes a slot unbound.
 *
 * # Safety
 * `session` must be live; `slot` NUL-terminated.
 */
enum PchStatus pch_slot_unbind(struct PchSession *session, uint64_t oid_, const char *slot);

/**
 * Releases a buffer returned by this library. Null data is ignored.
 *
 * # Safety
 * `buffer` must have come from this library and not been freed before.
 */
void pch_buffer_free(struct PchBuffer buffer);

/**
 * Oids of the live instances of `class_name`, ascending.
 *
 * # Safety
 * `session` must be live; `class_name` NUL-terminated; `out` has room for
 * `cap` values; `out_len` writable.
 */
enum PchStatus pch_extent(struct PchSession *session,
                          const char *class_name,
                          uint64_t *out,
                          size_t cap,
                          size_t *out_len);

/**
 * Upgrades every instance of `class_name` to the current version.
 *
 * # Safety
 * `session` must be live; `class_name` NUL-terminated; `out_count` null or
 * writable.
 */
enum PchStatus pch_migrate_eager(struct PchSession *session,
                                 const char *class_name,
                                 uint64_t *out_count);

/**
 * Serializes the closure of `roots` into a graph blob.
 *
 * # Safety
 * `session` must be live; `roots` points at `n` oids; `out` writable.
 */
enum PchStatus pch_export(struct PchSession *session,
                          const uint64_t *roots,
                          size_t n,
                          struct PchBuffer *out);

/**
 * Stages the objects of a graph blob under fresh oids. The new oids are
 * written in blob order: the i-th exported root first.
 *
 * # Safety
 * `session` must be live; `blob` points at `len` bytes; `out` has room
 * for `cap` values; `out_len` writable.
 */
enum PchStatus pch_import(struct PchSession *session,
                          const uint8_t *blob,
                          size_t len,
                          uint64_t *out,
                          size_t cap,
                          size_t *out_len);

/**
 * Rewrites the log keeping only live data. Fails with `DIRTY` if
 * anything is staged.
 *
 * # Safety
 * `session` must be live.
 */
enum PchStatus pch_compact(struct PchSession *session);

/**
 * Checks the store. `out_findings` receives the number of problems;
 * `out_report` (may be null) one line per problem.
 *
 * # Safety
 * `session` must be live; `out_findings` writable; `out_report` null or
 * writable.
 */
enum PchStatus pch_verify(struct PchSession *session,
                          size_t *out_findings,
                          struct PchBuffer *out_report);

/**
 * Renders an encoded value in literal syntax (for logs and debugging).
 *
 * # Safety
 * `value` points at `len` bytes; `out` writable.
 */
enum PchStatus pch_value_display(const uint8_t *value, size_t len, struct PchBuffer *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PACHYDERM_H */
